"""Exception hierarchy.

Every error raised on bad user input derives from :class:`BirarError` and
carries the name of the module that raised it, so the CLI can print
module-qualified messages and map them to exit code 1.
"""


class BirarError(Exception):
    module = "birar"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class LMError(BirarError):
    module = "lm_provider"


class ProviderTransportError(LMError):
    pass


class MalformedResponseError(LMError):
    pass


class InfoDistError(BirarError):
    module = "infodist"


class TrajectoryError(BirarError):
    module = "trajectory"


class ParseError(TrajectoryError):
    """Malformed rollout text. ``kind`` is one of UnclosedTag,
    InformationWithoutSearch, MultipleAnswers, EmptyInput."""

    def __init__(self, kind: str, offset: int, tag: str, detail: str = ""):
        self.kind = kind
        self.offset = offset
        self.tag = tag
        msg = f"{kind} at offset {offset} (tag <{tag}>)"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class RetrievalError(BirarError):
    module = "retrieval"


class IndexVersionError(RetrievalError):
    pass


class CorruptIndexError(RetrievalError):
    pass


class RewardError(BirarError):
    module = "rewards"


class EnvError(BirarError):
    module = "synthenv"


class TrainError(BirarError):
    module = "trainer"


class MergeError(BirarError):
    module = "merge"


class EvalError(BirarError):
    module = "evalreport"


class ConfigError(BirarError):
    module = "cli"
