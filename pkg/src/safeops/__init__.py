"""Safe online policy search for constrained episodic MDPs."""

__version__ = "0.1.0"
