// Umbrella header for the numerical library. The CLI runner lives in
// crm/cli.hpp and additionally needs OpenSSL.

#ifndef CRM_CRM_HPP
#define CRM_CRM_HPP

#include "crm/core.hpp"
#include "crm/divergence.hpp"
#include "crm/gauge.hpp"
#include "crm/model.hpp"
#include "crm/projection.hpp"
#include "crm/rmatrix.hpp"
#include "crm/transport.hpp"

#endif  // CRM_CRM_HPP
