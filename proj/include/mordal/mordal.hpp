#pragma once

#include "mordal/candidate.hpp"
#include "mordal/clustering.hpp"
#include "mordal/config.hpp"
#include "mordal/error.hpp"
#include "mordal/external_oracle.hpp"
#include "mordal/job.hpp"
#include "mordal/metrics.hpp"
#include "mordal/oracle.hpp"
#include "mordal/parallel.hpp"
#include "mordal/report.hpp"
#include "mordal/scaling.hpp"
#include "mordal/search.hpp"
#include "mordal/similarity.hpp"
#include "mordal/synthetic.hpp"
#include "mordal/trace.hpp"
