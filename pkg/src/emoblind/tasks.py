from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class TaskSpec:
    k: int
    name: str
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"task {self.name!r} needs at least two classes")

    @property
    def chance(self) -> float:
        """Accuracy of a uniform random guess, in percent."""
        return 100.0 / self.num_classes


GENDER = TaskSpec(1, "gender", 2)
ETHNICITY = TaskSpec(2, "ethnicity", 3)
EMOTION = TaskSpec(3, "emotion", 6)
ATTRACTIVE = TaskSpec(4, "attractive", 2)
SMILING = TaskSpec(5, "smiling", 2)

TASKS = {t.name: t for t in (GENDER, ETHNICITY, EMOTION, ATTRACTIVE, SMILING)}


def identity_task(num_identities: int) -> TaskSpec:
    return TaskSpec(0, "identity", num_identities)


def get_task(name: str, num_identities: int | None = None) -> TaskSpec:
    if name == "identity":
        if num_identities is None:
            raise ConfigError("identity task needs the number of identities")
        return identity_task(num_identities)
    if name == "verification":
        raise ConfigError("verification is a pair task, not a classification task")
    try:
        return TASKS[name]
    except KeyError:
        raise ConfigError(f"unknown task {name!r}") from None
