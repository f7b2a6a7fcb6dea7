"""
Console prompts that give up after a timeout.

A collector is often started and left alone, so any question asked of the
operator falls back to a default when nobody answers.
"""

import logging
import queue
import threading
from typing import Callable, Optional, Sequence, Tuple

logger = logging.getLogger('keybench.interactive')

DEFAULT_TIMEOUT = 10.0


def ask(prompt: str, timeout: float = DEFAULT_TIMEOUT,
        reader: Callable[[str], str] = input) -> Optional[str]:
    """Return the operator's answer, or None on timeout or end of input."""
    answers = queue.Queue()

    def read():
        try:
            answers.put(reader(prompt))
        except EOFError:
            answers.put(None)

    # daemon: a reader still blocked on the console must not keep the process alive
    threading.Thread(target=read, name='prompt', daemon=True).start()
    try:
        return answers.get(timeout=timeout)
    except queue.Empty:
        print("")
        return None


def choose(options: Sequence[Tuple[str, str]], title: str, timeout: float = DEFAULT_TIMEOUT,
           reader: Callable[[str], str] = input) -> str:
    """
    Numbered menu of (value, description) pairs. Blank, invalid or missing
    answers select the first option.
    """
    if not options:
        raise ValueError("nothing to choose from")
    print(title)
    for number, (value, description) in enumerate(options, 1):
        print("%d: %s%s" % (number, value, " (%s)" % description if description and description != value else ""))
    answer = ask("Enter line# [1]: ", timeout, reader)
    default = options[0][0]
    if answer is None:
        print("No user response within %g seconds; defaulting to %s" % (timeout, default))
        return default
    answer = answer.strip()
    if not answer:
        return default
    try:
        index = int(answer)
    except ValueError:
        index = 0
    if not 1 <= index <= len(options):
        print("'%s' is not a line number; defaulting to %s" % (answer, default))
        return default
    return options[index - 1][0]
