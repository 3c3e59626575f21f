"""Frozen reference values; regenerate with tests/oracles/generate_oracles.py."""

ABS_SIN_PERIOD = 4.0
ABS_SIN_HALF_PERIOD = 2.0
ABS_SIN_WINDOW_0P3_2 = 1.621612510405430213
ABS_SIN_WINDOW_1_7 = 4.6858023396767532433
SIN_SQ_PERIOD = 3.1415926535897932385
SIN_COS_PERIOD = 2.451770375915672749e-37
EIG_DIAG_4_8_OVER_PI = 2.5464790894703253723
POWER2_FROM_4_2PI = 2.5464790894703253723
MEAN_ABS_SIN = 0.63661977236758134308
DISCOUNTED_ABS_SIN = 0.54516570536368411502
DISCOUNTED_ABS_SIN_CLOSED = 0.54516570536368411502
INVERSE_TIME_GRAM_100_1 = 0.000097068530382450009707
FILTERED_SIN_MU = 2.8284271247461900976
EXP_MINUS_ONE = 0.3678794411714423216
SETTLING_INVERSE_TIME = [9.0, 99.0, 459.0]
