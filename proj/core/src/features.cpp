#include "mater/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "mater/dataio.hpp"
#include "mater/errors.hpp"

namespace mater {
namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / double(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / double(v.size()));
}

double max_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return *std::max_element(v.begin(), v.end());
}

double min_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return *std::min_element(v.begin(), v.end());
}

// Least-squares slope of v against time; 0 for fewer than 2 points.
double slope_of(const std::vector<double>& v, const std::vector<double>& t) {
  if (v.size() < 2) return 0.0;
  const double mt = mean_of(t), mv = mean_of(v);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    num += (t[i] - mt) * (v[i] - mv);
    den += (t[i] - mt) * (t[i] - mt);
  }
  return den > 0.0 ? num / den : 0.0;
}

// Linear-interpolation quantile, q in [0, 1].
double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - double(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

struct UtteranceAnalysis {
  FrameTrack loud;
  F0Track f0;
  std::vector<VoicedSegment> segments;
  std::vector<double> hnr_values;      // per voiced frame
  std::vector<double> f0_st;           // semitones, voiced frames
  std::vector<double> f0_st_times;     // frame times of voiced frames
  std::vector<double> jitters;         // per voiced segment
  std::vector<double> shimmers;        // per voiced segment
  std::vector<double> alpha_values;    // per frame
};

UtteranceAnalysis analyze(const AudioBuffer& audio, bool with_alpha) {
  UtteranceAnalysis a;
  a.loud = loudness_track(audio);
  a.f0 = aligned_f0(audio, a.loud.values.size());
  a.segments = segment_voicing(a.f0, a.loud);

  const FrameSpec spec;
  const auto flen = std::size_t(std::lround(spec.frame_len * audio.sample_rate));
  for (std::size_t t = 0; t < a.loud.values.size(); ++t) {
    std::span<const double> frame(
        audio.samples.data() + frame_start(t, audio.sample_rate, spec), flen);
    if (a.f0.f0_hz[t] > 0.0) {
      a.hnr_values.push_back(hnr(frame, a.f0.f0_hz[t], audio.sample_rate));
      a.f0_st.push_back(hz_to_semitones(a.f0.f0_hz[t]));
      a.f0_st_times.push_back(double(t) * spec.hop);
    }
    if (with_alpha) a.alpha_values.push_back(alpha_ratio(frame, audio.sample_rate));
  }

  for (const auto& seg : a.segments) {
    if (seg.kind != SegmentKind::voiced) continue;
    const auto s0 = std::size_t(std::lround(seg.start * audio.sample_rate));
    const auto s1 = std::min(audio.samples.size(),
                             std::size_t(std::lround(seg.end * audio.sample_rate)));
    if (s1 <= s0) continue;
    AudioBuffer slice{{audio.samples.begin() + s0, audio.samples.begin() + s1},
                      audio.sample_rate};
    F0Config f0cfg;
    if (slice.samples.size() <
        std::size_t(std::lround(std::max(0.025, 2.0 / f0cfg.f0_min) *
                                audio.sample_rate))) {
      continue;
    }
    const F0Track seg_f0 = estimate_f0(slice, f0cfg);
    const PeriodTrack pt = extract_periods(slice, seg_f0);
    if (pt.periods.size() >= 2) {
      a.jitters.push_back(jitter_local(pt.periods));
      a.shimmers.push_back(shimmer_local(pt.amplitudes));
    }
  }
  return a;
}

AudioBuffer slice_audio(const AudioBuffer& audio, double start, double end) {
  const auto s0 = std::size_t(std::lround(start * audio.sample_rate));
  const auto s1 = std::min(audio.samples.size(),
                           std::size_t(std::lround(end * audio.sample_rate)));
  return {{audio.samples.begin() + std::min(s0, s1), audio.samples.begin() + s1},
          audio.sample_rate};
}

}  // namespace

double hz_to_semitones(double hz) { return 12.0 * std::log2(hz / 27.5); }

F0Track aligned_f0(const AudioBuffer& audio, std::size_t n_frames) {
  F0Track f0;
  F0Config cfg;
  const auto win = std::size_t(
      std::lround(std::max(0.025, 2.0 / cfg.f0_min) * audio.sample_rate));
  if (audio.samples.size() >= win) {
    f0 = estimate_f0(audio, cfg);
  } else {
    f0.hop = cfg.hop;
    f0.voicing_threshold = cfg.voicing_threshold;
  }
  f0.f0_hz.resize(n_frames, 0.0);
  f0.voicing.resize(n_frames, 0.0);
  return f0;
}

WordProsody word_prosody(const AudioBuffer& audio, const WordAlignment& span,
                         const WordContext& ctx) {
  if (span.end <= span.start || span.end > audio.duration() + 1e-9) {
    throw ValidationError("word_prosody: span outside audio for token '" +
                          span.token + "'");
  }
  WordProsody out;
  out.values = Eigen::VectorXd::Zero(kProsodyDim);

  const AudioBuffer slice = slice_audio(audio, span.start, span.end);
  const FrameSpec spec;
  if (frame_count(slice.samples.size(), audio.sample_rate, spec) == 0) {
    out.degenerate = true;
    return out;
  }
  out.values[19] = span.end - span.start;
  if (ctx.prev_end >= 0.0) out.values[20] = std::max(0.0, span.start - ctx.prev_end);
  if (ctx.next_start >= 0.0) out.values[21] = std::max(0.0, ctx.next_start - span.end);

  const UtteranceAnalysis a = analyze(slice, /*with_alpha=*/true);
  std::vector<double> loud_times(a.loud.values.size());
  for (std::size_t t = 0; t < loud_times.size(); ++t) loud_times[t] = t * spec.hop;

  out.values[0] = mean_of(a.loud.values);
  out.values[1] = std_of(a.loud.values);
  out.values[2] = max_of(a.loud.values);
  out.values[3] = slope_of(a.loud.values, loud_times);

  const PeriodTrack pt = extract_periods(slice, a.f0);
  out.values[4] = jitter_local(pt.periods);
  out.values[5] = jitter_ppq5(pt.periods);
  out.values[6] = shimmer_local(pt.amplitudes);
  out.values[7] = shimmer_db(pt.amplitudes);

  out.values[8] = mean_of(a.alpha_values);
  out.values[9] = mean_of(a.hnr_values);
  out.values[10] = std_of(a.hnr_values);

  out.values[11] = mean_of(a.f0_st);
  out.values[12] = std_of(a.f0_st);
  out.values[13] = a.f0_st.empty() ? 0.0 : max_of(a.f0_st) - min_of(a.f0_st);
  out.values[14] = slope_of(a.f0_st, a.f0_st_times);

  std::size_t voiced_frames = 0;
  for (double f : a.f0.f0_hz) voiced_frames += f > 0.0 ? 1 : 0;
  out.values[15] = a.f0.f0_hz.empty()
                       ? 0.0
                       : double(voiced_frames) / double(a.f0.f0_hz.size());

  std::vector<double> vdurs, udurs;
  for (const auto& seg : a.segments) {
    if (seg.kind == SegmentKind::voiced) vdurs.push_back(seg.length());
    if (seg.kind == SegmentKind::unvoiced) udurs.push_back(seg.length());
  }
  out.values[16] = double(vdurs.size());
  out.values[17] = mean_of(vdurs);
  out.values[18] = mean_of(udurs);
  return out;
}

namespace {

enum Pos {
  ADJ, ADP, ADV, AUX, CCONJ, DET, INTJ, NOUN, NUM,
  PART, PRON, PROPN, PUNCT, SCONJ, SYM, VERB, X
};

const std::set<std::string>& word_set(Pos tag) {
  static const std::map<Pos, std::set<std::string>> sets = {
      {DET, {"the", "a", "an", "this", "that", "these", "those", "some",
             "any", "each", "every", "no", "all", "both"}},
      {ADP, {"in", "on", "at", "by", "for", "with", "from", "to", "of",
             "over", "under", "into", "about", "through", "between",
             "after", "before", "during", "against", "without"}},
      {CCONJ, {"and", "or", "but", "nor", "yet", "plus"}},
      {SCONJ, {"because", "although", "while", "if", "since", "unless",
               "until", "whereas", "though", "whether"}},
      {AUX, {"am", "is", "are", "was", "were", "be", "been", "being", "do",
             "does", "did", "have", "has", "had", "will", "would", "can",
             "could", "shall", "should", "may", "might", "must"}},
      {PART, {"not", "n't", "'s", "to"}},
      {INTJ, {"oh", "wow", "hey", "ah", "hmm", "yeah", "uh", "um", "ouch",
              "oops", "hello", "hi", "bye"}},
      {ADV, {"very", "never", "always", "often", "there", "here", "now",
             "then", "too", "also", "again", "soon", "maybe", "really",
             "so", "just", "quite"}},
      {NUM, {"zero", "one", "two", "three", "four", "five", "six", "seven",
             "eight", "nine", "ten", "hundred", "thousand", "million"}},
  };
  static const std::set<std::string> empty;
  auto it = sets.find(tag);
  return it == sets.end() ? empty : it->second;
}

// Pronoun -> grammatical person (1, 2, 3).
int pronoun_person(const std::string& w) {
  static const std::map<std::string, int> persons = {
      {"i", 1},     {"me", 1},      {"my", 1},     {"mine", 1},
      {"myself", 1}, {"we", 1},     {"us", 1},     {"our", 1},
      {"ours", 1},  {"ourselves", 1},
      {"you", 2},   {"your", 2},    {"yours", 2},  {"yourself", 2},
      {"yourselves", 2},
      {"he", 3},    {"him", 3},     {"his", 3},    {"she", 3},
      {"her", 3},   {"hers", 3},    {"it", 3},     {"its", 3},
      {"they", 3},  {"them", 3},    {"their", 3},  {"theirs", 3},
      {"himself", 3}, {"herself", 3}, {"itself", 3}, {"themselves", 3},
      {"who", 3},   {"whom", 3},    {"someone", 3}, {"anyone", 3},
      {"everyone", 3}, {"nobody", 3}};
  auto it = persons.find(w);
  return it == persons.end() ? 0 : it->second;
}

bool has_suffix(const std::string& w, const std::string& suf) {
  return w.size() > suf.size() &&
         w.compare(w.size() - suf.size(), suf.size(), suf) == 0;
}

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

Pos tag_token(const std::string& token, int& person) {
  person = 0;
  const std::string w = lower(token);
  const bool all_punct = std::all_of(w.begin(), w.end(), [](unsigned char c) {
    return std::ispunct(c);
  });
  if (!w.empty() && all_punct) {
    if (w.find_first_of("$%+=<>^|~") != std::string::npos) return SYM;
    return PUNCT;
  }
  const bool numeric = !w.empty() && std::all_of(w.begin(), w.end(),
                                                 [](unsigned char c) {
                                                   return std::isdigit(c) ||
                                                          c == '.' || c == ',';
                                                 }) &&
                       std::any_of(w.begin(), w.end(), [](unsigned char c) {
                         return std::isdigit(c);
                       });
  if (numeric || word_set(NUM).count(w)) return NUM;

  person = pronoun_person(w);
  if (person > 0) return PRON;
  for (Pos tag : {DET, ADP, CCONJ, SCONJ, AUX, PART, INTJ, ADV}) {
    if (word_set(tag).count(w)) return tag;
  }
  if (has_suffix(w, "ly")) return ADV;
  if (has_suffix(w, "ing") || has_suffix(w, "ed") || has_suffix(w, "ize")) {
    return VERB;
  }
  if (has_suffix(w, "ous") || has_suffix(w, "ful") || has_suffix(w, "ive") ||
      has_suffix(w, "able") || has_suffix(w, "ical")) {
    return ADJ;
  }
  if (has_suffix(w, "tion") || has_suffix(w, "ness") || has_suffix(w, "ment") ||
      has_suffix(w, "ity")) {
    return NOUN;
  }
  const bool has_alpha = std::any_of(w.begin(), w.end(), [](unsigned char c) {
    return std::isalpha(c);
  });
  if (!has_alpha) return X;
  if (std::isupper(static_cast<unsigned char>(token[0]))) return PROPN;
  return NOUN;
}

}  // namespace

Eigen::VectorXd word_syntax(const std::string& token,
                            const std::optional<Eigen::VectorXd>& sidecar) {
  if (sidecar) {
    if (sidecar->size() != kSyntaxDim) {
      throw ValidationError("word_syntax: sidecar vector has dimension " +
                            std::to_string(sidecar->size()) + ", expected 20");
    }
    return *sidecar;
  }
  if (token.empty()) throw ValidationError("word_syntax: empty token");
  int person = 0;
  const Pos tag = tag_token(token, person);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kSyntaxDim);
  v[int(tag)] = 1.0;
  if (person > 0) v[17 + person - 1] = 1.0;
  return v;
}

Eigen::VectorXd utterance_rhythm(const AudioBuffer& audio,
                                 const std::vector<WordAlignment>& alignments) {
  if (audio.samples.empty()) {
    throw ValidationError("utterance_rhythm: empty audio");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kRhythmDim);
  const double duration = audio.duration();
  v[33] = duration;
  v[31] = duration > 0.0 ? double(alignments.size()) / duration : 0.0;

  const FrameSpec spec;
  if (frame_count(audio.samples.size(), audio.sample_rate, spec) == 0) {
    v[32] = v[31];
    return v;
  }
  const UtteranceAnalysis a = analyze(audio, /*with_alpha=*/false);

  std::vector<double> loud_times(a.loud.values.size());
  for (std::size_t t = 0; t < loud_times.size(); ++t) loud_times[t] = t * spec.hop;
  v[0] = mean_of(a.loud.values);
  v[1] = std_of(a.loud.values);
  v[2] = max_of(a.loud.values);
  v[3] = max_of(a.loud.values) - min_of(a.loud.values);
  v[4] = slope_of(a.loud.values, loud_times);

  v[5] = mean_of(a.jitters);
  v[6] = std_of(a.jitters);
  v[7] = mean_of(a.shimmers);
  v[8] = std_of(a.shimmers);
  v[9] = mean_of(a.hnr_values);
  v[10] = std_of(a.hnr_values);

  v[11] = mean_of(a.f0_st);
  v[12] = std_of(a.f0_st);
  v[13] = a.f0_st.empty() ? 0.0 : max_of(a.f0_st) - min_of(a.f0_st);
  v[14] = slope_of(a.f0_st, a.f0_st_times);
  v[15] = quantile_of(a.f0_st, 0.20);
  v[16] = quantile_of(a.f0_st, 0.50);
  v[17] = quantile_of(a.f0_st, 0.80);

  std::size_t voiced_frames = 0;
  for (double f : a.f0.f0_hz) voiced_frames += f > 0.0 ? 1 : 0;
  v[18] = a.f0.f0_hz.empty() ? 0.0
                             : double(voiced_frames) / double(a.f0.f0_hz.size());

  std::vector<double> vdurs, udurs, pdurs;
  for (const auto& seg : a.segments) {
    switch (seg.kind) {
      case SegmentKind::voiced: vdurs.push_back(seg.length()); break;
      case SegmentKind::unvoiced: udurs.push_back(seg.length()); break;
      case SegmentKind::pause: pdurs.push_back(seg.length()); break;
    }
  }
  v[19] = double(vdurs.size());
  v[20] = duration > 0.0 ? double(vdurs.size()) / duration : 0.0;
  v[21] = mean_of(vdurs);
  v[22] = std_of(vdurs);
  v[23] = double(udurs.size());
  v[24] = mean_of(udurs);
  v[25] = std_of(udurs);
  v[26] = double(pdurs.size());
  v[27] = duration > 0.0 ? double(pdurs.size()) / duration : 0.0;
  v[28] = mean_of(pdurs);
  v[29] = std_of(pdurs);
  double pause_total = 0.0;
  for (double d : pdurs) pause_total += d;
  v[30] = duration > 0.0 ? pause_total / duration : 0.0;

  const double speaking_time = duration - pause_total;
  v[32] = speaking_time > 0.0 ? double(alignments.size()) / speaking_time : 0.0;
  return v;
}

namespace {

const std::map<std::string, std::set<std::string>>& sentiment_lexicons() {
  static const std::map<std::string, std::set<std::string>> lex = {
      {"positive", {"good", "great", "happy", "love", "wonderful", "best",
                    "nice", "beautiful", "amazing", "excellent", "fantastic",
                    "joy", "glad", "pleased", "lovely", "perfect", "fun",
                    "awesome", "delighted", "hope"}},
      {"negative", {"bad", "terrible", "awful", "hate", "horrible", "worst",
                    "ugly", "nasty", "poor", "wrong", "sad", "angry", "fear",
                    "disgusting", "annoying", "painful", "miserable",
                    "dreadful", "upset", "cruel"}},
      {"anger", {"angry", "mad", "furious", "rage", "outraged", "irritated",
                 "annoyed", "hate", "hostile", "resent", "fury", "livid"}},
      {"fear", {"afraid", "scared", "terrified", "fear", "anxious", "worried",
                "nervous", "panic", "dread", "frightened", "horror"}},
      {"sadness", {"sad", "unhappy", "depressed", "miserable", "grief",
                   "sorrow", "lonely", "cry", "tears", "heartbroken",
                   "gloomy", "hopeless"}},
      {"joy", {"happy", "joy", "delighted", "cheerful", "excited", "thrilled",
               "laugh", "smile", "glad", "wonderful", "ecstatic"}},
      {"surprise", {"surprised", "astonished", "amazed", "shocked", "sudden",
                    "unexpected", "wow", "startled", "stunned"}},
      {"social", {"friend", "family", "mother", "father", "people", "talk",
                  "together", "share", "brother", "sister", "neighbor",
                  "community", "team", "partner"}},
  };
  return lex;
}

const std::set<std::string>& negators() {
  static const std::set<std::string> n = {"not", "no", "never", "n't",
                                          "neither", "nor", "cannot", "without"};
  return n;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'') {
      cur.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

}  // namespace

Eigen::VectorXd utterance_sentiment(const std::string& transcript,
                                    const std::optional<Eigen::VectorXd>& sidecar,
                                    const SentimentConfig& cfg) {
  if (cfg.dim <= 0) throw ValidationError("utterance_sentiment: dim must be > 0");
  if (sidecar) {
    if (sidecar->size() != cfg.dim) {
      throw ValidationError("utterance_sentiment: sidecar has dimension " +
                            std::to_string(sidecar->size()) + ", expected " +
                            std::to_string(cfg.dim));
    }
    return *sidecar;
  }

  Eigen::VectorXd v = Eigen::VectorXd::Zero(cfg.dim);
  const std::vector<std::string> tokens = tokenize(transcript);
  if (tokens.empty()) return v;

  int slot = 0;
  for (const auto& [name, words] : sentiment_lexicons()) {
    int hits = 0, non_negated = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!words.count(tokens[i])) continue;
      ++hits;
      bool negated = false;
      for (std::size_t k = 1; k <= 2 && k <= i; ++k) {
        if (negators().count(tokens[i - k])) negated = true;
      }
      if (!negated) ++non_negated;
    }
    if (slot + 1 < cfg.dim) {
      v[slot] = double(hits) / double(tokens.size());
      v[slot + 1] = double(non_negated) / double(tokens.size());
    }
    slot += 2;
  }
  return v;
}

FeatureBundle build_bundle(const Sample& sample, const FeatureConfig& cfg) {
  FeatureBundle bundle;
  AudioBuffer audio;
  try {
    audio = read_wav(sample.wav);
  } catch (const std::exception& e) {
    throw RuntimeFailure("sample '" + sample.id + "': " + e.what());
  }

  const std::vector<Eigen::VectorXd>* syntax_rows = nullptr;
  if (auto it = cfg.syntax_sidecar.find(sample.id); it != cfg.syntax_sidecar.end()) {
    if (it->second.size() != sample.words.size()) {
      throw ValidationError("sample '" + sample.id +
                            "': syntax sidecar word count mismatch");
    }
    syntax_rows = &it->second;
  }

  const auto n = Eigen::Index(sample.words.size());
  bundle.word_seq.resize(n, kWordDim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const WordAlignment& w = sample.words[i];
    WordContext ctx;
    ctx.prev_end = i > 0 ? sample.words[i - 1].end : 0.0;
    ctx.next_start = i + 1 < n ? sample.words[i + 1].start : audio.duration();
    std::optional<Eigen::VectorXd> side;
    if (syntax_rows) side = (*syntax_rows)[i];
    bundle.word_seq.row(i).head(kSyntaxDim) =
        word_syntax(w.token, side).transpose();
    bundle.word_seq.row(i).tail(kProsodyDim) =
        word_prosody(audio, w, ctx).values.transpose();
  }

  std::optional<Eigen::VectorXd> senti_side;
  if (auto it = cfg.sentiment_sidecar.find(sample.id);
      it != cfg.sentiment_sidecar.end()) {
    senti_side = it->second;
  }
  const Eigen::VectorXd senti =
      utterance_sentiment(sample.transcript, senti_side, cfg.sentiment);
  const Eigen::VectorXd rhythm = utterance_rhythm(audio, sample.words);
  bundle.utterance.resize(senti.size() + rhythm.size());
  bundle.utterance << senti, rhythm;

  for (const auto& [name, path] : sample.embeddings) {
    try {
      bundle.embeddings[name] = read_matrix(path).cast<double>();
    } catch (const std::exception& e) {
      throw RuntimeFailure("sample '" + sample.id + "', embedding '" + name +
                           "': " + e.what());
    }
  }
  return bundle;
}

}  // namespace mater
