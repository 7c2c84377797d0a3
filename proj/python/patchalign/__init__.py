from patchalign._core import *  # noqa: F401,F403
