#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace qan::data {

// Lowercases ASCII and splits on whitespace and ASCII punctuation. Bytes
// >= 0x80 are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view raw);

// Embedded English stopword list (the NLTK "english" list).
bool is_stopword(std::string_view token);
const std::vector<std::string_view>& stopwords();

// Porter (1980) suffix-stripping stemmer. Words of length <= 2 are returned
// unchanged, as are tokens containing non-letters.
std::string porter_stem(std::string_view word);

// lowercase -> tokenize -> drop stopwords -> stem.
std::vector<std::string> preprocess(std::string_view raw);

// Removes <...> markup and decodes the five predefined XML entities.
std::string strip_tags(std::string_view text);

}  // namespace qan::data
