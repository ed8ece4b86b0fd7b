#include "doctest.h"

TEST_SUITE("simulator") {}
