def broken():
    """never closed
    return 1
