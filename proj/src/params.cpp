#include "truenet/params.hpp"

namespace truenet {

template struct ParamStore<float>;
template struct ParamStore<double>;

}  // namespace truenet
