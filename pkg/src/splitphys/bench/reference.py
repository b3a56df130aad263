"""Published reference figures shown next to measured values in reports.

These are fixed comparison columns; nothing here is asserted for equality.
"""

# outgoing server throughput, Mb/s
THROUGHPUT_MBPS = {
    "Bunny_1": 0.46,
    "Bunny_3": 1.40,
    "Obj_500": 0.72,
    "Obj_1000": 1.32,
    "Obj_2000": 2.70,
    "Obj_5000": 5.45,
    "Obj_7500": 8.31,
    "Obj_10000": 10.95,
}

# relay outgoing bandwidth per object count: (reference relay, commercial relay) KB/s
RELAY_KBPS = {
    32: (12.56, 16.52),
    64: (24.86, 32.58),
    128: (49.50, 63.00),
    256: (96.80, 130.50),
    512: (193.60, 257.40),
}

END_TO_END_LATENCY_MS = 68.0
CRITICAL_RATE_HZ = 48.0
STEP_BUDGET_MS = 10.0
OBJECTS_PER_USER = 4

MULTIOBJECT_SIZES = (500, 1000, 2000, 5000, 7500, 10000)
SOFTBODY_PARTICLES = (500, 1500)
RELAY_OBJECTS = (32, 64, 128, 256, 512)
