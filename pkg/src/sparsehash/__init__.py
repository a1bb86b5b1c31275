"""Learned sparse ternary hash codes and Hamming-ball retrieval."""
