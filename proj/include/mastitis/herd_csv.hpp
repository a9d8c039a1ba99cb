#pragma once

// CSV persistence for herds: milk.csv, cows.csv, events.csv and body.csv in
// one directory. An empty cell is a missing value; dates are ISO-8601.

#include "mastitis/core.hpp"
#include "mastitis/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mastitis {

class CsvSchemaError : public std::runtime_error {
public:
    CsvSchemaError(const std::string& file, std::size_t row, const std::string& column, const std::string& what)
        : std::runtime_error(file + (row ? " row " + std::to_string(row) : std::string()) +
                             (column.empty() ? std::string() : " column '" + column + "'") + ": " + what),
          row_(row),
          column_(column) {}

    std::size_t row() const { return row_; }
    const std::string& column() const { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

namespace detail {

class CsvTable {
public:
    CsvTable(const std::filesystem::path& path, std::vector<std::string> required) : file_(path.filename().string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CsvSchemaError(file_, 0, "", "cannot open " + path.string());
        std::string line;
        if (!std::getline(in, line)) throw CsvSchemaError(file_, 0, "", "missing header row");
        for (auto h : split(trim(line), ',')) columns_.emplace_back(trim(h));
        for (const auto& r : required)
            if (std::find(columns_.begin(), columns_.end(), r) == columns_.end())
                throw CsvSchemaError(file_, 0, r, "required column missing");
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            std::vector<std::string> cells;
            for (auto c : split(trim(line), ',')) cells.emplace_back(trim(c));
            if (cells.size() != columns_.size())
                throw CsvSchemaError(file_, rows_.size() + 1, "", "expected " + std::to_string(columns_.size()) + " cells");
            rows_.push_back(std::move(cells));
        }
    }

    std::size_t size() const { return rows_.size(); }

    const std::string& cell(std::size_t row, const std::string& column) const {
        const auto it = std::find(columns_.begin(), columns_.end(), column);
        return rows_[row][std::size_t(it - columns_.begin())];
    }

    template <class F>
    auto parse(std::size_t row, const std::string& column, F&& fn) const {
        try {
            return fn(cell(row, column));
        } catch (const CsvSchemaError&) {
            throw;
        } catch (const std::exception& e) {
            throw CsvSchemaError(file_, row + 1, column, e.what());
        }
    }

    std::string text(std::size_t row, const std::string& column) const {
        return parse(row, column, [](const std::string& s) {
            if (s.empty()) throw std::invalid_argument("value required");
            return s;
        });
    }
    double number(std::size_t row, const std::string& column) const {
        return parse(row, column, [](const std::string& s) {
            if (s.empty()) throw std::invalid_argument("value required");
            return parse_double(s);
        });
    }
    std::optional<double> optional_number(std::size_t row, const std::string& column) const {
        return parse(row, column, [](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return parse_double(s);
        });
    }
    Date date(std::size_t row, const std::string& column) const {
        return parse(row, column, [](const std::string& s) { return Date::parse(s); });
    }

    [[noreturn]] void fail(std::size_t row, const std::string& column, const std::string& what) const {
        throw CsvSchemaError(file_, row + 1, column, what);
    }

private:
    std::string file_;
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

inline std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace detail

inline void save_csv(const Herd& herd, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("cows.csv");
        out << "cow_id,farm_id,parity,calving_date,genetic_merit\n";
        for (const auto& c : herd.cows)
            out << c.cow_id << ',' << c.farm_id << ',' << c.parity << ',' << c.calving_date.iso() << ','
                << format_double(c.genetic_merit) << '\n';
    }
    {
        auto out = open("events.csv");
        out << "cow_id,onset_date,end_date\n";
        for (const auto& c : herd.cows)
            for (const auto& e : c.infections) out << c.cow_id << ',' << e.onset.iso() << ',' << e.end.iso() << '\n';
    }
    {
        auto out = open("body.csv");
        out << "cow_id,date,weight,bcs\n";
        for (const auto& c : herd.cows)
            for (const auto& b : c.body)
                out << c.cow_id << ',' << b.date.iso() << ',' << detail::opt(b.weight) << ',' << detail::opt(b.bcs) << '\n';
    }
    {
        auto out = open("milk.csv");
        out << "cow_id,date,yield_am,yield_pm,fat_pct,protein_pct,lactose_pct,scc,urea\n";
        for (const auto& m : herd.milk)
            out << m.cow_id << ',' << m.date.iso() << ',' << format_double(m.yield_am) << ','
                << format_double(m.yield_pm) << ',' << detail::opt(m.fat_pct) << ',' << detail::opt(m.protein_pct)
                << ',' << detail::opt(m.lactose_pct) << ',' << detail::opt(m.scc) << ',' << detail::opt(m.urea) << '\n';
    }
}

/// Reads the four herd tables; throws CsvSchemaError with file, row and column.
inline Herd load_csv(const std::filesystem::path& dir) {
    Herd herd;
    std::map<std::string, std::size_t> index;

    const detail::CsvTable cows(dir / "cows.csv", {"cow_id", "farm_id", "parity", "calving_date", "genetic_merit"});
    for (std::size_t r = 0; r < cows.size(); ++r) {
        CowRecord c;
        c.cow_id = cows.text(r, "cow_id");
        c.farm_id = cows.text(r, "farm_id");
        c.parity = int(cows.parse(r, "parity", [](const std::string& s) { return parse_long(s); }));
        if (c.parity < 1) cows.fail(r, "parity", "must be a positive integer");
        c.calving_date = cows.date(r, "calving_date");
        c.genetic_merit = cows.number(r, "genetic_merit");
        if (!index.emplace(c.cow_id, herd.cows.size()).second) cows.fail(r, "cow_id", "duplicate cow " + c.cow_id);
        herd.cows.push_back(std::move(c));
    }
    auto cow_of = [&](const detail::CsvTable& t, std::size_t r) -> CowRecord& {
        const auto id = t.text(r, "cow_id");
        auto it = index.find(id);
        if (it == index.end()) t.fail(r, "cow_id", "unknown cow " + id);
        return herd.cows[it->second];
    };

    const detail::CsvTable events(dir / "events.csv", {"cow_id", "onset_date", "end_date"});
    for (std::size_t r = 0; r < events.size(); ++r) {
        InfectionEvent e{events.date(r, "onset_date"), events.date(r, "end_date")};
        if (e.end < e.onset) events.fail(r, "end_date", "before onset_date");
        cow_of(events, r).infections.push_back(e);
    }
    for (auto& c : herd.cows)
        std::stable_sort(c.infections.begin(), c.infections.end(),
                         [](const auto& a, const auto& b) { return a.onset < b.onset; });

    const detail::CsvTable body(dir / "body.csv", {"cow_id", "date", "weight", "bcs"});
    for (std::size_t r = 0; r < body.size(); ++r) {
        BodyRecording b{body.date(r, "date"), body.optional_number(r, "weight"), body.optional_number(r, "bcs")};
        if (b.bcs && (*b.bcs < 1 || *b.bcs > 5)) body.fail(r, "bcs", "outside [1,5]");
        if (b.weight && *b.weight <= 0) body.fail(r, "weight", "must be positive");
        cow_of(body, r).body.push_back(b);
    }
    for (auto& c : herd.cows)
        std::stable_sort(c.body.begin(), c.body.end(), [](const auto& a, const auto& b) { return a.date < b.date; });

    const detail::CsvTable milk(dir / "milk.csv", {"cow_id", "date", "yield_am", "yield_pm", "fat_pct", "protein_pct",
                                                   "lactose_pct", "scc", "urea"});
    herd.milk.reserve(milk.size());
    for (std::size_t r = 0; r < milk.size(); ++r) {
        MilkRecording m;
        m.cow_id = cow_of(milk, r).cow_id;
        m.date = milk.date(r, "date");
        m.yield_am = milk.number(r, "yield_am");
        m.yield_pm = milk.number(r, "yield_pm");
        if (m.yield_am < 0) milk.fail(r, "yield_am", "negative yield");
        if (m.yield_pm < 0) milk.fail(r, "yield_pm", "negative yield");
        for (auto [col, field] : {std::pair{"fat_pct", &m.fat_pct}, std::pair{"protein_pct", &m.protein_pct},
                                  std::pair{"lactose_pct", &m.lactose_pct}}) {
            *field = milk.optional_number(r, col);
            if (*field && (**field < 0 || **field > 15)) milk.fail(r, col, "percentage outside [0,15]");
        }
        m.scc = milk.optional_number(r, "scc");
        if (m.scc && *m.scc < 0) milk.fail(r, "scc", "negative count");
        m.urea = milk.optional_number(r, "urea");
        herd.milk.push_back(std::move(m));
    }
    return herd;
}

}  // namespace mastitis
