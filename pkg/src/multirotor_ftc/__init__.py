"""Fault-tolerant multirotor control toolkit."""
