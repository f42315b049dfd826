#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgqg/common.hpp"

namespace kgqg {

/// Token vocabulary with fixed special slots. Immutable once frozen.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kSos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Vocabulary() {
        for (const char *tok : {"<pad>", "<sos>", "<eos>", "<unk>"}) push(tok);
    }

    int add(const std::string &token) {
        require(!frozen_, "vocabulary is frozen");
        auto it = index_.find(token);
        if (it != index_.end()) return it->second;
        return push(token);
    }

    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

    /// Unknown tokens map to UNK.
    int lookup(const std::string &token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    bool contains(const std::string &token) const { return index_.count(token) > 0; }

    const std::string &token(int index) const {
        require(index >= 0 && index < size(), "vocabulary index ", index, " out of range");
        return tokens_[static_cast<std::size_t>(index)];
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    /// One token per line; the line number is the index.
    void save(const std::string &path) const {
        std::ofstream os(path);
        require(bool(os), "cannot write vocabulary file ", path);
        for (const auto &tok : tokens_) os << tok << "\n";
    }

    static Vocabulary load(const std::string &path) {
        std::ifstream is(path);
        require(bool(is), "cannot read vocabulary file ", path);
        Vocabulary v;
        std::string line;
        int idx = 0;
        while (std::getline(is, line)) {
            if (idx < 4) {
                require(line == v.tokens_[static_cast<std::size_t>(idx)],
                        "vocabulary file ", path, " is missing special token at index ", idx);
            } else {
                v.push(line);
            }
            ++idx;
        }
        require(idx >= 4, "vocabulary file ", path, " is missing special tokens");
        v.freeze();
        return v;
    }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    bool frozen_ = false;

    int push(const std::string &token) {
        int id = size();
        tokens_.push_back(token);
        index_.emplace(token, id);
        return id;
    }
};

} // namespace kgqg
