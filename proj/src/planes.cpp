#include "fastaid/planes.hpp"

#include <cstdlib>

#include "fastaid/parallel.hpp"

namespace fastaid {

const char* plane_name(Plane p) {
  switch (p) {
    case Plane::Axial: return "axial";
    case Plane::Coronal: return "coronal";
    case Plane::Sagittal: return "sagittal";
  }
  return "?";
}

int default_threads() {
  if (const char* env = std::getenv("FASTAID_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

}  // namespace fastaid
