MINUTES_PER_DAY = 1440

BAR_COLUMNS = ["date", "time", "open", "high", "low", "close"]
PRICE_COLUMNS = ["open", "high", "low", "close"]

UNIQUE_COMBO = ["date", "time"]   # one bar per minute per pair

# format -> (field separator, timestamp layout)
FORMATS = {
    "canonical_csv": (",", "%m/%d/%Y %H:%M"),
    "histdata_ascii": (";", "%Y%m%d %H%M%S"),
}

PANEL_CSV_INDEX = "minute"
DEFAULT_MIN_COVERAGE = 0.8

# evaluate/errors/<model>.csv, as read back by validate_outputs.py
ERROR_DTYPES = {
    "fold": "int64",
    "minute": "int64",
    "target": "float64",
    "prediction": "float64",
    "squared_error": "float64",
}

ERROR_RANGES = {
    "fold": (0, None),
    "minute": (0, MINUTES_PER_DAY - 1),
    "target": (0.0, None),         # log ranges are non-negative
    "squared_error": (0.0, None),
}
