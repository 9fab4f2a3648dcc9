"""Independent numpy evaluation of the pinned loss instances frozen into losses_test.cpp."""
import numpy as np


def softsort(s, tau, power):
    s = np.asarray(s, dtype=float)
    srt = np.sort(s)[::-1]
    logits = -np.abs(srt[:, None] - s[None, :]) ** power / tau
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def sorting_loss(z, y, tau=1.0, power=2.0):
    return float(-(softsort(y, tau, power) * np.log(softsort(z, tau, power))).sum())


def am_rankmax(z, y, alpha, delta=lambda a, b: 1.0):
    total = 0.0
    for j in range(len(y)):
        if y[j] <= 0:
            continue
        inner = 1.0
        for i in range(len(y)):
            if y[i] < y[j]:
                m = alpha * (y[i] == 0) + delta(y[i], y[j])
                inner += max(z[i] - z[j] + m, 0.0)
        total += np.log(inner)
    return total


print("softsort row0 [2,1,3]:", softsort([2, 1, 3], 1.0, 2.0)[0].tolist())
print("sorting_loss y=[2,1,0] z=[0,1,2]: %.17g" % sorting_loss([0, 1, 2], [2, 1, 0]))
print("sorting_loss self y=[2,1,0]: %.17g" % sorting_loss([2, 1, 0], [2, 1, 0]))
print("am_rankmax y=[3,1,0,0] z=[0.5,0.2,0.4,-1] alpha=3: %.17g" % am_rankmax([0.5, 0.2, 0.4, -1], [3, 1, 0, 0], 3))
print("rankmax z=[0.3,0.1,-0.2] y=[1,0,1]: %.17g" % sum(
    np.log(sum(max(zi - [0.3, 0.1, -0.2][j] + 1, 0) for zi in [0.3, 0.1, -0.2])) for j in [0, 2]))
