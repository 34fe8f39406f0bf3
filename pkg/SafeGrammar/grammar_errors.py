class GrammarError(Exception):
    """Base class for everything the fragment grammar refuses to read or build."""


class SafeSyntaxError(GrammarError):
    pass


class UnmatchedClosure(GrammarError):
    pass


class NoAttachmentPoint(GrammarError):
    pass


class DigitExhausted(GrammarError):
    pass
