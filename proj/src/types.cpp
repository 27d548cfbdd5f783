#include "calphys/types.hpp"

#include <cmath>

namespace calphys {

std::string to_string(Task task) { return task == Task::HR ? "hr" : "rr"; }

Task parse_task(const std::string& text) {
  if (text == "hr" || text == "HR") return Task::HR;
  if (text == "rr" || text == "RR") return Task::RR;
  throw Error("unknown task '" + text + "'");
}

void Band::validate() const {
  if (!(lo > 0.0 && lo < hi)) throw Error("invalid band");
}

void SpatioTemporalMap::validate() const {
  if (!(fps > 0.0F) || !std::isfinite(fps)) throw Error("fps must be positive");
  if (data.size() != std::size_t{channels} * rois * frames) throw Error("map payload size mismatch");
  for (float v : data) {
    if (!std::isfinite(v)) throw Error("non-finite value in map");
  }
}

}  // namespace calphys
