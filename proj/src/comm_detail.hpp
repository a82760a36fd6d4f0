#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rastream/comm.hpp"

namespace rastream::detail {

std::string pack_doubles(std::span<const double> v);
std::vector<double> unpack_doubles(std::string_view s);
void fold_into(std::vector<double>& acc, std::span<const double> v, ReduceOp op);
std::string pack_string_list(const std::vector<std::string>& items);
std::vector<std::string> unpack_string_list(std::string_view s);
std::string missing_ranks_string(const std::vector<bool>& arrived);

}  // namespace rastream::detail
