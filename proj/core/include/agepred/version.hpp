#pragma once

#define AGEPREDICT_VERSION "0.1.0"
