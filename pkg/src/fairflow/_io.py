from contextlib import contextmanager, nullcontext


@contextmanager
def text_sink(target):
    """Yield a writable text stream for a path or pass a stream through."""
    if hasattr(target, "write"):
        with nullcontext(target) as fh:
            yield fh
    else:
        with open(target, "w", newline="") as fh:
            yield fh
