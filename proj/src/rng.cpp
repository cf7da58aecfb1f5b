#include "molr/rng.hpp"

// header-only; translation unit kept so the target exists per module
