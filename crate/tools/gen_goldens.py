#!/usr/bin/env python3
"""Reference integrators for the three classic-control tasks.

Generates the golden trajectory fixtures used by the environment tests and
the `verify` suite. Each fixture starts from a hand-picked internal state,
applies a fixed action pattern for 20 steps, and records
`step obs... reward done` per line. Dynamics follow the standard
formulations of the three benchmarks; this file is written independently of
the Rust implementation so the two can cross-check each other.
"""

import math
import os

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "crates", "gbdqn", "src", "envs", "goldens")
STEPS = 20


def fmt(x: float) -> str:
    return repr(float(x))


def write_fixture(name: str, header: str, rows):
    path = os.path.join(OUT_DIR, name)
    with open(path, "w") as f:
        f.write(f"# {header}\n")
        f.write("# columns: step obs... reward done\n")
        for step, obs, reward, done in rows:
            cols = [str(step)] + [fmt(v) for v in obs] + [fmt(reward), "true" if done else "false"]
            f.write(" ".join(cols) + "\n")
    print(f"wrote {path}")


# ----------------------------------------------------------------------
# MountainCar
# ----------------------------------------------------------------------

def mountain_car():
    force, gravity = 0.001, 0.0025
    min_pos, max_pos, max_speed, goal = -1.2, 0.6, 0.07, 0.5
    pos, vel = -0.5, 0.0
    rows = [(0, (pos, vel), 0.0, False)]
    for t in range(STEPS):
        action = t % 3
        vel += (action - 1) * force + math.cos(3 * pos) * (-gravity)
        vel = min(max(vel, -max_speed), max_speed)
        pos += vel
        pos = min(max(pos, min_pos), max_pos)
        if pos == min_pos and vel < 0:
            vel = 0.0
        done = pos >= goal and vel >= 0.0
        rows.append((t + 1, (pos, vel), -1.0, done))
        if done:
            break
    write_fixture("mountain_car.txt", "mountain_car: init -0.5 0.0; actions a_t = t % 3", rows)


# ----------------------------------------------------------------------
# Acrobot
# ----------------------------------------------------------------------

def acrobot_dsdt(s, torque, m1, m2, l1, lc1, lc2, g):
    i1 = i2 = 1.0
    th1, th2, w1, w2 = s
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(th2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(th2)) + i2
    phi2 = m2 * lc2 * g * math.cos(th1 + th2 - math.pi / 2.0)
    phi1 = (
        -m2 * l1 * lc2 * w2**2 * math.sin(th2)
        - 2 * m2 * l1 * lc2 * w2 * w1 * math.sin(th2)
        + (m1 * lc1 + m2 * l1) * g * math.cos(th1 - math.pi / 2.0)
        + phi2
    )
    dd2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * w1**2 * math.sin(th2) - phi2) / (
        m2 * lc2**2 + i2 - d2**2 / d1
    )
    dd1 = -(d2 * dd2 + phi1) / d1
    return (w1, w2, dd1, dd2)


def wrap(x, lo, hi):
    diff = hi - lo
    while x > hi:
        x -= diff
    while x < lo:
        x += diff
    return x


def acrobot():
    m1 = m2 = 1.0
    l1 = l2 = 1.0
    lc1, lc2 = l1 / 2.0, l2 / 2.0
    g = 9.8
    dt = 0.2
    max_v1, max_v2 = 4 * math.pi, 9 * math.pi
    torques = [-1.0, 0.0, 1.0]

    s = [0.05, -0.08, 0.02, -0.03]

    def obs(state):
        th1, th2, w1, w2 = state
        return (math.cos(th1), math.sin(th1), math.cos(th2), math.sin(th2), w1, w2)

    rows = [(0, obs(s), 0.0, False)]
    for t in range(STEPS):
        torque = torques[t % 3]

        def f(y):
            return acrobot_dsdt(y, torque, m1, m2, l1, lc1, lc2, g)

        k1 = f(s)
        k2 = f([s[i] + dt / 2 * k1[i] for i in range(4)])
        k3 = f([s[i] + dt / 2 * k2[i] for i in range(4)])
        k4 = f([s[i] + dt * k3[i] for i in range(4)])
        s = [s[i] + dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(4)]
        s[0] = wrap(s[0], -math.pi, math.pi)
        s[1] = wrap(s[1], -math.pi, math.pi)
        s[2] = min(max(s[2], -max_v1), max_v1)
        s[3] = min(max(s[3], -max_v2), max_v2)
        done = -math.cos(s[0]) - math.cos(s[1] + s[0]) > 1.0
        reward = 0.0 if done else -1.0
        rows.append((t + 1, obs(s), reward, done))
        if done:
            break
    write_fixture(
        "acrobot.txt", "acrobot: init 0.05 -0.08 0.02 -0.03; actions a_t = t % 3", rows
    )


# ----------------------------------------------------------------------
# CartPole
# ----------------------------------------------------------------------

def cartpole():
    gravity, masscart, masspole = 9.8, 1.0, 0.1
    half_length, force_mag, tau = 0.5, 10.0, 0.02
    total_mass = masscart + masspole
    polemass_length = masspole * half_length
    x_threshold = 2.4
    theta_threshold = 12 * 2 * math.pi / 360

    x, x_dot, th, th_dot = 0.01, -0.02, 0.03, 0.04
    rows = [(0, (x, x_dot, th, th_dot), 0.0, False)]
    for t in range(STEPS):
        action = t % 2
        force = force_mag if action == 1 else -force_mag
        cos_t, sin_t = math.cos(th), math.sin(th)
        temp = (force + polemass_length * th_dot**2 * sin_t) / total_mass
        th_acc = (gravity * sin_t - cos_t * temp) / (
            half_length * (4.0 / 3.0 - masspole * cos_t**2 / total_mass)
        )
        x_acc = temp - polemass_length * th_acc * cos_t / total_mass
        x += tau * x_dot
        x_dot += tau * x_acc
        th += tau * th_dot
        th_dot += tau * th_acc
        done = abs(x) > x_threshold or abs(th) > theta_threshold
        rows.append((t + 1, (x, x_dot, th, th_dot), 1.0, done))
        if done:
            break
    write_fixture(
        "cartpole.txt", "cartpole: init 0.01 -0.02 0.03 0.04; actions a_t = t % 2", rows
    )


if __name__ == "__main__":
    os.makedirs(OUT_DIR, exist_ok=True)
    mountain_car()
    acrobot()
    cartpole()
