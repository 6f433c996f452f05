class DataError(Exception):
    """Raised when input data is missing, malformed, or geometrically degenerate.

    The CLI maps this to exit code 2; bad invocations exit with 1.
    """
