# Tests package for optimarl
