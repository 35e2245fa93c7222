#pragma once

#include "ufc/data/dataset.hpp"
#include "ufc/data/io.hpp"
#include "ufc/data/render.hpp"
#include "ufc/data/texture.hpp"
#include "ufc/data/warp.hpp"
