#pragma once

// c10 ships glog-style CHECK macros that collide with doctest's. Pull torch in
// first, drop its versions, then let doctest define its own.
#include <torch/torch.h>

#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LE
#undef CHECK_LT
#undef CHECK_GE
#undef CHECK_GT
#undef CHECK_NOTNULL

#include <doctest.h>
