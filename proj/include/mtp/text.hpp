#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtp/data.hpp"
#include "mtp/tensor.hpp"

// Textual modality: deterministic description templates, the optional
// external-generator client contract, tokenization and the train-only
// vocabulary.
namespace mtp::text {

constexpr int kMaxTokens = 128;
constexpr int kUnknownTokenId = 0;

struct SeriesStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double trend_slope = 0.0;
  int peak_index = 0;
};

struct TextTemplateInput {
  std::string topic = "urban traffic profiling";
  std::string background = "road sensor network";
  std::string position = "unspecified location";
  std::string item_description;  // filled by the template or an external client
  SeriesStats series_stats;
};

inline SeriesStats compute_stats(const data::TimeSeriesInstance& instance) {
  require(instance.values.numel() > 0, "compute_stats: empty series");
  const int n = instance.length();
  SeriesStats st;
  st.min = st.max = instance.values.at(0, 0);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    // Stats summarize channel 0; extra channels only feed the encoders.
    const double v = instance.values.at(i, 0);
    sum += v;
    if (v < st.min) st.min = v;
    if (v > st.max) {
      st.max = v;
      st.peak_index = i;
    }
  }
  st.mean = sum / n;
  if (n >= 2) {
    // Least-squares slope against the sample index.
    const double tbar = (n - 1) / 2.0;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
      num += (i - tbar) * (instance.values.at(i, 0) - st.mean);
      den += (i - tbar) * (i - tbar);
    }
    st.trend_slope = num / den;
  }
  return st;
}

// External generator contract: one call, prompt in, text out. Implementations
// own their transport; a timeout or error is reported as nullopt and the
// deterministic fallback takes over.
struct TextGenRequest {
  std::string prompt;
  int max_tokens = kMaxTokens;
};

class TextGenClient {
public:
  virtual ~TextGenClient() = default;
  virtual std::optional<std::string> generate(const TextGenRequest& request) = 0;
};

// Append-only transcript of external-client calls, for reproducibility.
class TranscriptWriter {
public:
  explicit TranscriptWriter(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw std::runtime_error("TranscriptWriter: cannot open " + path);
  }

  void record(const std::string& prompt, const std::string& response, bool fallback_used) {
    out_ << "== prompt\n" << prompt << "\n== response" << (fallback_used ? " (fallback)" : "")
         << "\n" << response << "\n== end\n";
    out_.flush();
  }

private:
  std::ofstream out_;
};

inline std::string format_stat(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Greedy whitespace/punctuation tokenizer, lowercased.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '.' || ch == '-') {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

inline std::string truncate_tokens(const std::string& text, int max_tokens) {
  const auto tokens = tokenize(text);
  if (static_cast<int>(tokens.size()) <= max_tokens) return text;
  std::string out;
  for (int i = 0; i < max_tokens; ++i) {
    if (i) out += " ";
    out += tokens[static_cast<std::size_t>(i)];
  }
  return out;
}

inline std::string fallback_item_description(const SeriesStats& st) {
  std::string trend = st.trend_slope > 0.01 ? "rising" : st.trend_slope < -0.01 ? "falling" : "steady";
  return "readings are " + trend + " with peak at step " + std::to_string(st.peak_index);
}

// Deterministic template over topic / background / position / item
// description plus computed series statistics. An external client, when
// configured, replaces only the item-description slot; any client failure
// falls back to the deterministic text and is never fatal.
inline std::string generate_description(const data::TimeSeriesInstance& instance,
                                        TextTemplateInput meta,
                                        TextGenClient* client = nullptr,
                                        TranscriptWriter* transcript = nullptr) {
  require(instance.values.numel() > 0, "generate_description: empty series");
  meta.series_stats = compute_stats(instance);
  const SeriesStats& st = meta.series_stats;

  if (meta.topic.empty()) meta.topic = "urban traffic profiling";
  if (meta.background.empty()) meta.background = "road sensor network";
  if (meta.position.empty()) meta.position = "unspecified location";

  std::string item = meta.item_description;
  bool fallback_used = false;
  if (client != nullptr) {
    TextGenRequest req;
    req.prompt = "Describe one window of traffic sensor readings. topic: " + meta.topic +
                 "; background: " + meta.background + "; position: " + meta.position +
                 "; mean " + format_stat(st.mean) + ", min " + format_stat(st.min) + ", max " +
                 format_stat(st.max) + ".";
    std::optional<std::string> resp;
    try {
      resp = client->generate(req);
    } catch (const std::exception& e) {
      std::cerr << "text generation client failed: " << e.what() << "; using fallback\n";
    }
    if (resp && !resp->empty()) {
      item = *resp;
    } else {
      fallback_used = true;
    }
    if (transcript) transcript->record(req.prompt, item.empty() ? "(fallback pending)" : item, fallback_used);
  }
  if (item.empty()) item = fallback_item_description(st);

  std::string out = "topic: " + meta.topic + ". background: " + meta.background +
                    ". position: " + meta.position + ". item: " + item + ". statistics: mean " +
                    format_stat(st.mean) + ", min " + format_stat(st.min) + ", max " +
                    format_stat(st.max) + ", slope " + format_stat(st.trend_slope) + ", peak index " +
                    std::to_string(st.peak_index) + ".";
  return truncate_tokens(out, kMaxTokens);
}

// Token -> id map built from the train split only. Id 0 is reserved for
// unknown tokens so test-only words never leak vocabulary.
class Vocabulary {
public:
  Vocabulary() { tokens_.push_back("<unk>"); }

  static Vocabulary build(const std::vector<std::string>& train_texts) {
    Vocabulary v;
    for (const auto& text : train_texts)
      for (const auto& tok : tokenize(text))
        if (!v.ids_.count(tok)) {
          v.ids_.emplace(tok, static_cast<int>(v.tokens_.size()));
          v.tokens_.push_back(tok);
        }
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  int id_of(const std::string& tok) const {
    auto it = ids_.find(tok);
    return it == ids_.end() ? kUnknownTokenId : it->second;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::string& text, int max_tokens = kMaxTokens) const {
    std::vector<int> out;
    for (const auto& tok : tokenize(text)) {
      if (static_cast<int>(out.size()) >= max_tokens) break;
      out.push_back(id_of(tok));
    }
    require(!out.empty(), "Vocabulary::encode: empty text after tokenization");
    return out;
  }

  static Vocabulary from_tokens(std::vector<std::string> tokens) {
    require(!tokens.empty() && tokens[0] == "<unk>", "Vocabulary: token table must start with <unk>");
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.ids_.clear();
    for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i)
      v.ids_.emplace(v.tokens_[static_cast<std::size_t>(i)], i);
    return v;
  }

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Sidecar text file: one record per instance, "<index>\t<utf-8 text>".
inline std::map<int, std::string> read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_sidecar: cannot open " + path);
  std::map<int, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("read_sidecar: missing tab separator at line " + std::to_string(line_no));
    out[std::stoi(line.substr(0, tab))] = line.substr(tab + 1);
  }
  return out;
}

inline void write_sidecar(const std::string& path, const std::vector<std::string>& texts) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_sidecar: cannot open " + path);
  for (int i = 0; i < static_cast<int>(texts.size()); ++i)
    out << i << "\t" << texts[static_cast<std::size_t>(i)] << "\n";
}

}  // namespace mtp::text
