#include "segqc/io.hpp"

#include "segqc/error.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <sstream>

namespace segqc {

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_row(const std::string& line)
{
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return cells;
}

class CellError : public std::exception {};

double parse_number(const std::string& cell)
{
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (!cell.empty() && *first == '+')
        ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (cell.empty() || ec != std::errc{} || ptr != last || !std::isfinite(v))
        throw CellError{};
    return v;
}

int parse_binary(const std::string& cell)
{
    const double v = parse_number(cell);
    if (v != 0.0 && v != 1.0)
        throw CellError{};
    return static_cast<int>(v);
}

} // namespace

std::string format_double(double v)
{
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    (void)ec;
    return std::string(buf.data(), ptr);
}

CohortTable parse_cohort_csv(const std::string& text, const std::string& source)
{
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;

    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.starts_with("\xEF\xBB\xBF"))
            line.erase(0, 3);
        if (!trim(line).empty()) {
            header = split_row(line);
            break;
        }
    }
    if (header.empty())
        throw ValidationError(source + ": empty cohort CSV");

    const std::array<const char*, 8> known{"subject_id", "age", "sex", "dx", "site", "volume", "cv", "mc_dice"};
    std::array<int, 8> col{};
    col.fill(-1);
    for (std::size_t c = 0; c < header.size(); ++c) {
        bool found = false;
        for (std::size_t k = 0; k < known.size(); ++k)
            if (header[c] == known[k]) {
                if (col[k] >= 0)
                    throw ValidationError(source + ": line " + std::to_string(line_no) + ": duplicate column '" +
                                          header[c] + "'");
                col[k] = static_cast<int>(c);
                found = true;
            }
        if (!found)
            throw ValidationError(source + ": line " + std::to_string(line_no) + ": unknown column '" + header[c] +
                                  "'");
    }
    for (std::size_t k : {0, 1, 2, 3, 5})
        if (col[k] < 0)
            throw ValidationError(source + ": missing required column '" + known[k] + "'");

    CohortTable t;
    t.has_site = col[4] >= 0;
    t.has_cv = col[6] >= 0;
    t.has_mc_dice = col[7] >= 0;

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        auto cells = split_row(line);
        if (cells.size() != header.size())
            throw ValidationError(source + ": line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
        CohortRow r;
        std::size_t k = 0;
        try {
            k = 0;
            r.subject_id = cells[static_cast<std::size_t>(col[0])];
            if (r.subject_id.empty())
                throw CellError{};
            k = 1;
            r.age = parse_number(cells[static_cast<std::size_t>(col[1])]);
            k = 2;
            r.sex = parse_binary(cells[static_cast<std::size_t>(col[2])]);
            k = 3;
            r.dx = parse_binary(cells[static_cast<std::size_t>(col[3])]);
            if (t.has_site) {
                k = 4;
                r.site = cells[static_cast<std::size_t>(col[4])];
                if (r.site->empty())
                    throw CellError{};
            }
            k = 5;
            r.volume = parse_number(cells[static_cast<std::size_t>(col[5])]);
            if (t.has_cv) {
                k = 6;
                const auto& c = cells[static_cast<std::size_t>(col[6])];
                if (!c.empty())
                    r.cv = parse_number(c);
            }
            if (t.has_mc_dice) {
                k = 7;
                const auto& c = cells[static_cast<std::size_t>(col[7])];
                if (!c.empty())
                    r.mc_dice = parse_number(c);
            }
        } catch (const CellError&) {
            const auto& bad = cells[static_cast<std::size_t>(col[k])];
            throw ValidationError(source + ": line " + std::to_string(line_no) + ", column " + known[k] +
                                  ": cannot parse '" + bad + "'");
        }
        t.rows.push_back(std::move(r));
    }
    return t;
}

CohortTable read_cohort_csv(const fs::path& path)
{
    return parse_cohort_csv(read_text(path), path.string());
}

std::string format_cohort_csv(const CohortTable& t)
{
    std::string out = "subject_id,age,sex,dx";
    if (t.has_site)
        out += ",site";
    out += ",volume";
    if (t.has_cv)
        out += ",cv";
    if (t.has_mc_dice)
        out += ",mc_dice";
    out += "\n";
    for (const auto& r : t.rows) {
        out += r.subject_id + "," + format_double(r.age) + "," + std::to_string(r.sex) + "," + std::to_string(r.dx);
        if (t.has_site)
            out += "," + r.site.value_or("");
        out += "," + format_double(r.volume);
        if (t.has_cv)
            out += "," + (r.cv ? format_double(*r.cv) : std::string{});
        if (t.has_mc_dice)
            out += "," + (r.mc_dice ? format_double(*r.mc_dice) : std::string{});
        out += "\n";
    }
    return out;
}

void write_cohort_csv(const CohortTable& table, const fs::path& path)
{
    write_text_file(path, format_cohort_csv(table));
}

} // namespace segqc
