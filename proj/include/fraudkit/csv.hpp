#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace fraudkit::csv {

using Record = std::vector<std::string>;

// RFC 4180 reader: quoted fields, doubled quotes, CRLF or LF line ends.
// Blank lines are skipped.
std::vector<Record> read_records(std::istream& in);

// Quotes a field only when it contains a delimiter, quote or line break.
std::string escape(std::string_view field);

void write_record(std::ostream& out, const Record& record);

}  // namespace fraudkit::csv
