"""Notification services for experiment lifecycle events.

A log provider is always enabled.  A webhook provider is added when
``FEDSIM_NOTIFY_WEBHOOK_URL`` is set.  Delivery failures are logged and
never fail the run.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import time
from typing import Any, Protocol

import requests

from config import runtime

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
RETRY_BACKOFF_SECONDS = (0.5, 1.0)


class NotificationProvider(Protocol):
    def send(self, event: str, payload: dict[str, Any]) -> None:
        """Send a notification for a run event."""


class LogNotificationProvider:
    """Default provider that logs notification payloads."""

    def send(self, event: str, payload: dict[str, Any]) -> None:
        logger.info("RUN_NOTIFICATION event=%s payload=%s", event, json.dumps(payload, sort_keys=True, default=str))


def _short_error(text: str, *, limit: int = 120) -> str:
    value = (text or "").replace("\n", " ").strip()
    if len(value) <= limit:
        return value
    return value[:limit] + "..."


def sign_body(secret: str, body: bytes) -> str:
    digest = hmac.new(secret.encode("utf-8"), body, hashlib.sha256).hexdigest()
    return f"sha256={digest}"


class WebhookNotificationProvider:
    """Provider that POSTs JSON notifications to a webhook endpoint."""

    def __init__(
        self,
        url: str,
        secret: str | None = None,
        timeout_seconds: int = 10,
        sleep=time.sleep,
    ) -> None:
        self.url = url
        self.secret = secret
        self.timeout_seconds = timeout_seconds
        self._sleep = sleep

    def send(self, event: str, payload: dict[str, Any]) -> None:
        self.deliver(event, payload)

    def deliver(self, event: str, payload: dict[str, Any]) -> bool:
        body = json.dumps({"event": event, "payload": payload}, sort_keys=True, default=str).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.secret:
            headers["X-Fedsim-Signature"] = sign_body(self.secret, body)

        for attempt in range(1, MAX_ATTEMPTS + 1):
            try:
                response = requests.post(
                    self.url,
                    data=body,
                    headers=headers,
                    timeout=self.timeout_seconds,
                    allow_redirects=False,
                )
            except requests.Timeout as exc:
                if attempt < MAX_ATTEMPTS:
                    logger.warning("WEBHOOK_RETRY reason=timeout attempt=%s event=%s", attempt, event)
                    self._sleep(RETRY_BACKOFF_SECONDS[attempt - 1])
                    continue
                logger.warning("WEBHOOK_FAIL status=0 event=%s error=%s", event, _short_error(str(exc)))
                return False
            except requests.RequestException as exc:
                logger.warning("WEBHOOK_FAIL status=0 event=%s error=%s", event, _short_error(str(exc)))
                return False

            status_code = int(response.status_code or 0)
            if 200 <= status_code < 300:
                logger.info("WEBHOOK_OK status=%s event=%s", status_code, event)
                return True
            if 500 <= status_code < 600 and attempt < MAX_ATTEMPTS:
                logger.warning(
                    "WEBHOOK_RETRY reason=server_error status=%s attempt=%s event=%s", status_code, attempt, event
                )
                self._sleep(RETRY_BACKOFF_SECONDS[attempt - 1])
                continue
            logger.warning(
                "WEBHOOK_FAIL status=%s event=%s body=%s", status_code, event, _short_error(response.text)
            )
            return False
        return False


class NotificationService:
    """Coordinates one or more providers and fails safely."""

    def __init__(self, providers: list[NotificationProvider]) -> None:
        self.providers = providers

    def notify_run_completed(
        self,
        command: str,
        output_dir: str,
        methods: list[str],
        summary_rows: list[dict[str, Any]],
    ) -> None:
        payload = {
            "command": command,
            "outputDir": output_dir,
            "methods": methods,
            "summary": summary_rows,
        }
        self._send("run.completed", payload)

    def notify_run_failed(self, command: str, error: BaseException) -> None:
        payload = {
            "command": command,
            "errorType": error.__class__.__name__,
            "error": _short_error(str(error)),
        }
        self._send("run.failed", payload)

    def _send(self, event: str, payload: dict[str, Any]) -> None:
        for provider in self.providers:
            try:
                provider.send(event, payload)
            except Exception:
                logger.exception("notification provider failed event=%s provider=%s", event, provider.__class__.__name__)


def create_notification_service_from_env() -> NotificationService:
    providers: list[NotificationProvider] = [LogNotificationProvider()]
    url = runtime.notify_webhook_url()
    if url:
        providers.append(WebhookNotificationProvider(url, secret=runtime.notify_secret()))
    return NotificationService(providers)
