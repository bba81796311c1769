"""
异常体系

三类错误分别对应 CLI 退出码：
- ConfigError:      1（配置错误）
- DataError:        2（输入数据错误）
- CalibrationError: 3（校准不可行）

code 字段保存机器可读的错误名（如 CycleDetected），CLI 将其写入 stderr 的 JSON。
"""
from __future__ import annotations


class HiconformError(Exception):
    exit_code: int = 4

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message

    def to_dict(self) -> dict:
        return {"error": self.code, "message": self.message, "exit_code": self.exit_code}


class ConfigError(HiconformError):
    exit_code = 1


class DataError(HiconformError):
    exit_code = 2


class CalibrationError(HiconformError):
    exit_code = 3
