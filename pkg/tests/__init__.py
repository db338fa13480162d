# Tests for cst-proposals
