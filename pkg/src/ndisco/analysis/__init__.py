"""Closed-form bounds, structural checks on asynchronous frame layouts, and run statistics."""
