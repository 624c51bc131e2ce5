// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#include "tensor.hpp"

#include "error.hpp"

namespace ckm {

int64_t shape_numel(const std::vector<int64_t> & shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        n *= d;
    }
    return n;
}

void check_same_structure(const TensorMap & a, const TensorMap & b,
                          const char * lhs, const char * rhs, bool require_dtype) {
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() || ib != b.end()) {
        if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
            throw MismatchError("tensor '" + ia->first + "' present in " + lhs +
                                " but missing from " + rhs);
        }
        if (ia == a.end() || ib->first < ia->first) {
            throw MismatchError("tensor '" + ib->first + "' present in " + rhs +
                                " but missing from " + lhs);
        }
        if (ia->second.shape != ib->second.shape) {
            throw MismatchError("tensor '" + ia->first + "': shape mismatch between " +
                                lhs + " and " + rhs);
        }
        if (require_dtype && ia->second.source_dtype != ib->second.source_dtype) {
            throw MismatchError("tensor '" + ia->first + "': dtype mismatch between " +
                                lhs + " (" + dtype_name(ia->second.source_dtype) + ") and " +
                                rhs + " (" + dtype_name(ib->second.source_dtype) + ")");
        }
        ++ia;
        ++ib;
    }
}

} // namespace ckm
