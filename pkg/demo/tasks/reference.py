TIME_NS = 7998000

def compute(xs):
    return [x + 1.0 for x in xs]
