PERIODS_PER_YEAR = 250
DEFAULT_WINDOW = 21
