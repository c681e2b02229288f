"""Closed-loop bias control toolkit for event cameras."""
