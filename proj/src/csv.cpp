#include "mets/csv.hpp"

#include <charconv>
#include <ostream>

namespace mets::csv {

bool split_line(std::string_view line, std::vector<std::string>& fields)
{
    fields.clear();
    if (!line.empty() && line.back() == '\r')
    {
        line.remove_suffix(1);
    }
    std::string current;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i)
    {
        const char c = line[i];
        if (in_quotes)
        {
            if (c == '"')
            {
                if (i + 1 < line.size() && line[i + 1] == '"')
                {
                    current.push_back('"');
                    ++i;
                }
                else
                {
                    in_quotes = false;
                }
            }
            else
            {
                current.push_back(c);
            }
        }
        else if (c == '"')
        {
            in_quotes = true;
        }
        else if (c == ',')
        {
            fields.push_back(std::move(current));
            current.clear();
        }
        else
        {
            current.push_back(c);
        }
    }
    fields.push_back(std::move(current));
    return !in_quotes;
}

std::string quote_if_needed(std::string_view field)
{
    if (field.find_first_of(",\"\n") == std::string_view::npos)
    {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field)
    {
        if (c == '"')
        {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields)
{
    for (std::size_t i = 0; i < fields.size(); ++i)
    {
        if (i > 0)
        {
            out << ',';
        }
        out << quote_if_needed(fields[i]);
    }
    out << '\n';
}

std::string format_double(double value)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

}  // namespace mets::csv
