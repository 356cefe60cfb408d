#pragma once

#include "harmonpaint/core.hpp"
#include "harmonpaint/mask_ops.hpp"
#include "harmonpaint/attention.hpp"
#include "harmonpaint/sams.hpp"
#include "harmonpaint/makvs.hpp"
#include "harmonpaint/schedule.hpp"
#include "harmonpaint/hooks.hpp"
#include "harmonpaint/image.hpp"
#include "harmonpaint/backend.hpp"
#include "harmonpaint/steer.hpp"
#include "harmonpaint/toy_denoiser.hpp"
#include "harmonpaint/config.hpp"
#include "harmonpaint/analysis.hpp"
#include "harmonpaint/pipeline.hpp"
#include "harmonpaint/ablation.hpp"
