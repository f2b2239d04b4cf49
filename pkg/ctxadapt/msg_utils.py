"""
file: msg_utils.py
brief: coloured terminal messages shared by the runner and its workers

Errors and warnings go to stderr and are never silenced; info and progress lines go to stdout.
"""

import sys

_VERBOSE = True
_RESET = "\x1b[0m"
_STYLES = {"error": "\x1b[1;31m", "warning": "\x1b[1;36m", "info": "\x1b[94m"}


def set_verbosity(verbose: bool):
    """Enable or silence info and progress messages."""
    global _VERBOSE  # pylint: disable=global-statement
    _VERBOSE = verbose


def _paint(style: str, text: str) -> str:
    return f"{_STYLES[style]}{text}{_RESET}"


def msg_err(message: str):
    sys.stderr.write(_paint("error", f"Error: {message}") + "\n")


def msg_fatal(message: str, code: int = 1):
    """Report an error and leave with the given exit status."""
    msg_err(message)
    raise SystemExit(code)


def msg_warn(message: str):
    sys.stderr.write(f"{_paint('warning', 'Warning:')} {message}\n")


def msg_info(message: str):
    """Print a section banner."""
    if _VERBOSE:
        print(_paint("info", message))


def msg_step(what: str, done: bool = False):
    """Print a 'Loading ...' progress line, overwritten by its 'Done!' counterpart."""
    if not _VERBOSE:
        return
    if done:
        print(f"{what}: Done!")
    else:
        print(f"{what}: ...", end="\r")
