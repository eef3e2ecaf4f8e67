# hcint imaging package
