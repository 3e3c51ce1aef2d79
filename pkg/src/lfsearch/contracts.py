"""Input-contract checking shared by all modules."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its contract."""


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ContractViolation(message)
