from __future__ import annotations

import os


def env_first(*names: str, default: str = "") -> str:
    for name in names:
        value = (os.environ.get(name) or "").strip()
        if value:
            return value
    return default


def log_level() -> str:
    return env_first("FEDSIM_LOG_LEVEL", "LOG_LEVEL", default="INFO").upper()


def workers() -> int:
    raw = env_first("FEDSIM_WORKERS", default="1")
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)


def notify_webhook_url() -> str:
    return env_first("FEDSIM_NOTIFY_WEBHOOK_URL", "NOTIFY_WEBHOOK_URL")


def notify_secret() -> str:
    return env_first("FEDSIM_NOTIFY_SECRET", "NOTIFY_WEBHOOK_SECRET")


def run_slow_tests() -> bool:
    return env_first("FEDSIM_RUN_SLOW") == "1"
