#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ffdc {

// Square Boolean visibility matrix. get(i, j) == true means row token i may
// attend to column token j.
struct BoolMask {
    int n = 0;
    std::vector<uint8_t> bits;

    BoolMask() = default;
    explicit BoolMask(int size) : n(size), bits(static_cast<size_t>(size) * size, 0) {
        if (size <= 0) throw std::invalid_argument("BoolMask: size must be positive");
    }

    bool get(int i, int j) const { return bits[static_cast<size_t>(i) * n + j] != 0; }
    void set(int i, int j, bool v) { bits[static_cast<size_t>(i) * n + j] = v ? 1 : 0; }

    // Every query row must see at least one key; enforced before softmax.
    int first_empty_row() const {
        for (int i = 0; i < n; ++i) {
            bool any = false;
            for (int j = 0; j < n; ++j)
                if (get(i, j)) {
                    any = true;
                    break;
                }
            if (!any) return i;
        }
        return -1;
    }

    bool contains(const BoolMask& other) const {
        if (n != other.n) return false;
        for (size_t i = 0; i < bits.size(); ++i)
            if (other.bits[i] && !bits[i]) return false;
        return true;
    }

    bool operator==(const BoolMask& other) const { return n == other.n && bits == other.bits; }
};

}  // namespace ffdc
