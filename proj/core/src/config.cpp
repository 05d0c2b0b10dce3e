#include "facor/config.hpp"

#include <cmath>

#include "facor/errors.hpp"

namespace facor {

void FaCoRConfig::validate() const {
    if (height < 1 || width < 1 || channels < 1) {
        throw ConfigError("feature map dims must all be >= 1");
    }
    if (embed_dim != channels) {
        throw ConfigError("embed_dim must equal channels: the fused output is the "
                          "2C concatenation of the pooled map with r");
    }
    if (ci_reduction < 1 || channels % ci_reduction != 0) {
        throw ConfigError("channels must be divisible by ci_reduction");
    }
    if (!(bounded_lo < bounded_hi)) {
        throw ConfigError("bounded-normal range must satisfy lower < upper");
    }
    if (!std::isfinite(gamma_init)) {
        throw ConfigError("gamma_init must be finite");
    }
}

FaCoRConfig FaCoRConfig::toy() {
    FaCoRConfig c;
    c.height = 4;
    c.width = 4;
    c.channels = 8;
    c.embed_dim = 8;
    c.ci_reduction = 4;
    return c;
}

}  // namespace facor
