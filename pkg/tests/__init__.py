"""Unit test package for maskgraph."""
