"""Shared test configuration."""

import os
from datetime import timedelta

from hypothesis import settings

settings.register_profile("ci", deadline=timedelta(seconds=5))
settings.register_profile("dev", max_examples=25, deadline=None)
settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))
