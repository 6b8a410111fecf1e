#pragma once

// Click-log ingestion: parsing, cleaning, session segmentation and the
// count tables every other module reads.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "qrec/common.hpp"

namespace qrec {

struct ClickRecord {
    std::int64_t timestamp = 0;
    std::string user;
    std::string query;
    std::string url;
    int rank = 1;

    friend bool operator==(const ClickRecord&, const ClickRecord&) = default;
};

/// One query event inside a session. Consecutive duplicates are folded into a
/// single event spanning [timestamp, last_timestamp].
struct SessionEvent {
    std::int64_t timestamp = 0;
    std::int64_t last_timestamp = 0;
    std::string query;
};

struct Session {
    std::string user;
    std::vector<SessionEvent> queries;
    std::size_t id = 0;
};

inline constexpr std::int64_t kDefaultSessionTimeout = 300;

struct ParseResult {
    std::vector<ClickRecord> records;
    std::size_t skipped = 0;
};

/// Parse one `timestamp<TAB>user<TAB>query<TAB>url<TAB>rank` line.
/// Returns false if the line is malformed.
inline bool parse_log_line(std::string_view line, ClickRecord& out) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto f = text::split(line, '\t');
    if (f.size() != 5) return false;
    std::int64_t ts = 0;
    int rank = 0;
    if (!fmt_num::parse_int(f[0], ts)) return false;
    if (!fmt_num::parse_int(f[4], rank) || rank < 1) return false;
    auto user = text::normalize_ws(f[1]);
    auto query = text::normalize_ws(f[2]);
    auto url = text::normalize_ws(f[3]);
    if (user.empty() || query.empty() || url.empty()) return false;
    out = ClickRecord{ts, std::move(user), std::move(query), std::move(url), rank};
    return true;
}

/// Parse click-log lines, skipping (and tallying) malformed ones. Blank lines
/// are ignored entirely. Throws if more than half the non-blank lines are bad.
template <class Lines>
ParseResult parse_log(const Lines& lines) {
    ParseResult res;
    std::size_t seen = 0;
    for (const auto& raw : lines) {
        std::string_view line(raw);
        if (text::normalize_ws(line).empty()) continue;
        ++seen;
        ClickRecord rec;
        if (parse_log_line(line, rec))
            res.records.push_back(std::move(rec));
        else
            ++res.skipped;
    }
    if (seen > 0 && res.skipped * 2 > seen)
        throw Error("click log rejected: " + std::to_string(res.skipped) + " of " +
                    std::to_string(seen) + " lines malformed");
    return res;
}

inline ParseResult read_log(std::istream& in) {
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    return parse_log(lines);
}

inline void write_log(std::ostream& out, const std::vector<ClickRecord>& records) {
    for (const auto& r : records)
        out << r.timestamp << '\t' << r.user << '\t' << r.query << '\t' << r.url << '\t' << r.rank << '\n';
}

/// Collapse per-cookie duplicates of (user, query, url), keeping the earliest
/// timestamp and the best rank, then drop (query, url) pairs seen only once.
/// Output keeps first-occurrence order.
inline std::vector<ClickRecord> clean_log(const std::vector<ClickRecord>& records) {
    using Triple = std::tuple<std::string_view, std::string_view, std::string_view>;
    std::map<Triple, std::size_t> slot;
    std::vector<ClickRecord> dedup;
    dedup.reserve(records.size());
    for (const auto& r : records) {
        Triple key{r.user, r.query, r.url};
        auto it = slot.find(key);
        if (it == slot.end()) {
            dedup.push_back(r);
            // keys view into `records`, which outlives the map
            slot.emplace(key, dedup.size() - 1);
        } else {
            auto& kept = dedup[it->second];
            kept.timestamp = std::min(kept.timestamp, r.timestamp);
            kept.rank = std::min(kept.rank, r.rank);
        }
    }

    std::map<std::pair<std::string_view, std::string_view>, std::size_t> pair_count;
    for (const auto& r : dedup) ++pair_count[{r.query, r.url}];

    std::vector<ClickRecord> out;
    out.reserve(dedup.size());
    for (auto& r : dedup)
        if (pair_count[{r.query, r.url}] >= 2) out.push_back(r);
    return out;
}

/// Split each user's time-ordered events into sessions at gaps larger than
/// `timeout_s`. Sessions are numbered in (user, time) order.
inline std::vector<Session> segment_sessions(const std::vector<ClickRecord>& records,
                                             std::int64_t timeout_s = kDefaultSessionTimeout) {
    if (timeout_s <= 0) throw Error("session timeout must be positive");
    std::map<std::string_view, std::vector<const ClickRecord*>> by_user;
    for (const auto& r : records) by_user[r.user].push_back(&r);

    std::vector<Session> out;
    for (auto& [user, evs] : by_user) {
        std::stable_sort(evs.begin(), evs.end(),
                         [](const ClickRecord* a, const ClickRecord* b) { return a->timestamp < b->timestamp; });
        Session cur;
        std::int64_t last_ts = 0;
        for (const ClickRecord* r : evs) {
            if (!cur.queries.empty() && r->timestamp - last_ts > timeout_s) {
                cur.id = out.size();
                out.push_back(std::move(cur));
                cur = Session{};
            }
            if (cur.queries.empty()) cur.user = std::string(user);
            if (!cur.queries.empty() && cur.queries.back().query == r->query)
                cur.queries.back().last_timestamp = r->timestamp;
            else
                cur.queries.push_back({r->timestamp, r->timestamp, r->query});
            last_ts = r->timestamp;
        }
        if (!cur.queries.empty()) {
            cur.id = out.size();
            out.push_back(std::move(cur));
        }
    }
    return out;
}

inline void write_sessions(std::ostream& out, const std::vector<Session>& sessions) {
    for (const auto& s : sessions)
        for (const auto& e : s.queries) out << s.user << '\t' << s.id << '\t' << e.timestamp << '\t' << e.query << '\n';
}

/// Click count tables. Immutable once built.
struct ClickStats {
    using UrlQuery = std::pair<std::string, std::string>;  // (url, query)

    std::map<UrlQuery, std::int64_t> cnt_uq;
    std::map<std::string, std::int64_t> cnt_q;
    std::map<std::string, std::int64_t> cnt_u;
    std::int64_t total = 0;
    std::map<std::string, std::set<std::string>> uc;  // query -> clicked urls
    std::map<std::string, std::set<std::string>> qc;  // url -> clicking queries
    std::map<UrlQuery, int> best_rank;

    bool has_query(const std::string& q) const { return cnt_q.count(q) != 0; }

    std::int64_t query_count(const std::string& q) const {
        auto it = cnt_q.find(q);
        return it == cnt_q.end() ? 0 : it->second;
    }
    std::int64_t url_count(const std::string& u) const {
        auto it = cnt_u.find(u);
        return it == cnt_u.end() ? 0 : it->second;
    }
    std::int64_t pair_count(const std::string& u, const std::string& q) const {
        auto it = cnt_uq.find({u, q});
        return it == cnt_uq.end() ? 0 : it->second;
    }
    int rank_of(const std::string& u, const std::string& q) const { return best_rank.at({u, q}); }

    double p_query(const std::string& q) const {
        return total == 0 ? 0.0 : static_cast<double>(query_count(q)) / static_cast<double>(total);
    }
    double p_url(const std::string& u) const {
        return total == 0 ? 0.0 : static_cast<double>(url_count(u)) / static_cast<double>(total);
    }
    double p_url_given_query(const std::string& u, const std::string& q) const {
        auto c = query_count(q);
        return c == 0 ? 0.0 : static_cast<double>(pair_count(u, q)) / static_cast<double>(c);
    }

    const std::set<std::string>& urls_of(const std::string& q) const {
        static const std::set<std::string> empty;
        auto it = uc.find(q);
        return it == uc.end() ? empty : it->second;
    }
    const std::set<std::string>& queries_of(const std::string& u) const {
        static const std::set<std::string> empty;
        auto it = qc.find(u);
        return it == qc.end() ? empty : it->second;
    }
};

inline ClickStats build_click_stats(const std::vector<ClickRecord>& records) {
    ClickStats s;
    for (const auto& r : records) {
        ClickStats::UrlQuery key{r.url, r.query};
        ++s.cnt_uq[key];
        ++s.cnt_q[r.query];
        ++s.cnt_u[r.url];
        ++s.total;
        s.uc[r.query].insert(r.url);
        s.qc[r.url].insert(r.query);
        auto [it, fresh] = s.best_rank.try_emplace(key, r.rank);
        if (!fresh) it->second = std::min(it->second, r.rank);
    }
    return s;
}

}  // namespace qrec
