// Generated by hostbridge register; do not edit by hand.
#include <hostbridge/export.hpp>

using hostbridge::raw::mh_cell;

extern "C" {
mh_cell convolve2(mh_cell, mh_cell);
mh_cell euclid_norm(mh_cell);
mh_cell myrnorm(mh_cell, mh_cell, mh_cell);
mh_cell zero(mh_cell, mh_cell, mh_cell, mh_cell);

void hostbridge_register(void) {
  hostbridge::register_function("convolve2", &convolve2);
  hostbridge::register_function("euclid_norm", &euclid_norm);
  hostbridge::register_function("myrnorm", &myrnorm);
  hostbridge::register_function("zero", &zero);
}
}
