"""Fixed keyboard vocabulary: 64 key codes plus NONE=0."""

NONE = 0

_KEY_NAMES = (
    # letters
    [chr(c) for c in range(ord("a"), ord("z") + 1)]
    # digits
    + [str(d) for d in range(10)]
    # arrows
    + ["up", "down", "left", "right"]
    # modifiers / control keys
    + ["space", "shift", "ctrl", "alt", "tab", "enter", "esc", "backspace"]
    # function keys
    + [f"f{i}" for i in range(1, 13)]
    # punctuation
    + ["comma", "period", "slash", "semicolon"]
)

assert len(_KEY_NAMES) == 64

KEY_CODES = {name: i + 1 for i, name in enumerate(_KEY_NAMES)}
KEY_NAMES = {code: name for name, code in KEY_CODES.items()}

# NONE + 64 keys
KEY_VOCAB_SIZE = len(_KEY_NAMES) + 1


def key_code(name: str) -> int:
    """Look up the code for a key name (case-insensitive)."""
    try:
        return KEY_CODES[name.lower()]
    except KeyError:
        raise KeyError(f"unknown key name: {name!r}") from None
