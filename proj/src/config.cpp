// placeholder — implemented in a later pass
