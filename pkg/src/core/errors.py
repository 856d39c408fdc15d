class InvalidArgumentError(ValueError):
    """參數不符合前置條件。"""


class PatternParseError(ValueError):
    """圖樣描述無法解析；position 為 1 起算的 token 位置。"""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (position {position})"
        super().__init__(message)


class SizeLimitError(ValueError):
    """輸入規模超過設定上限。"""

    def __init__(self, message: str, *, limit: float | None = None, required: float | None = None):
        self.limit = limit
        self.required = required
        if required is not None and limit is not None:
            message = f"{message} (required {required:g}, limit {limit:g})"
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """搜尋在迭代上限內未收斂；bracket 為最後的 (t_low, t_high)。"""

    def __init__(self, message: str, bracket: tuple[int, int]):
        self.bracket = bracket
        super().__init__(f"{message} (bracket {bracket[0]}..{bracket[1]})")
