import os
import unittest
from unittest import mock

from config import runtime


class RuntimeTest(unittest.TestCase):
    def test_env_first_skips_blank_values(self) -> None:
        with mock.patch.dict(os.environ, {"A_VAR": "  ", "B_VAR": " value "}):
            self.assertEqual(runtime.env_first("A_VAR", "B_VAR"), "value")
            self.assertEqual(runtime.env_first("A_VAR", default="fallback"), "fallback")

    def test_log_level(self) -> None:
        with mock.patch.dict(os.environ, {"FEDSIM_LOG_LEVEL": "debug"}):
            self.assertEqual(runtime.log_level(), "DEBUG")
        with mock.patch.dict(os.environ, {"FEDSIM_LOG_LEVEL": "", "LOG_LEVEL": ""}):
            self.assertEqual(runtime.log_level(), "INFO")

    def test_workers(self) -> None:
        for raw, expected in (("3", 3), ("0", 1), ("many", 1), ("", 1)):
            with mock.patch.dict(os.environ, {"FEDSIM_WORKERS": raw}):
                self.assertEqual(runtime.workers(), expected, msg=raw)

    def test_run_slow_tests_flag(self) -> None:
        with mock.patch.dict(os.environ, {"FEDSIM_RUN_SLOW": "1"}):
            self.assertTrue(runtime.run_slow_tests())
        with mock.patch.dict(os.environ, {"FEDSIM_RUN_SLOW": "yes"}):
            self.assertFalse(runtime.run_slow_tests())


if __name__ == "__main__":
    unittest.main()
