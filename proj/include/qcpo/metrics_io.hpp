#pragma once

#include "qcpo/trainer.hpp"

#include <cstdio>
#include <string>

namespace qcpo {

inline const char* metrics_csv_header() {
    return "iter,env_steps,avg_return_100ep,outage_prob_100ep,avg_cost_sum_100ep,lambda,"
           "emp_quantile,policy_loss,quantile_loss,value_loss,tail_loss,mean_kl,qx_rate";
}

// Shortest round-trip formatting so identical runs produce identical files.
inline std::string metrics_csv_row(const IterationMetrics& m) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%ld,%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  m.iter, m.env_steps, m.avg_return_100ep, m.outage_prob_100ep, m.avg_cost_sum_100ep,
                  m.lambda, m.emp_quantile, m.policy_loss, m.quantile_loss, m.value_loss, m.tail_loss,
                  m.mean_kl, m.qx_rate);
    return buf;
}

}  // namespace qcpo
