#!/usr/bin/env python3
"""Knowledge-guided training-set augmentation.

Left: the adversarial transform notches out the pulse fundamental and its
second and third multiples (81-tap band-stops, +/-2.5 BPM), leaving a
realistic pulse-free window that gets a random label.  Right: the high-HR
transform compresses a clean window in time by two, doubling its dominant
frequency and label.

Run:  python demos/demo_augmentation.py
"""
import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from wristhr.augment import LabeledFrame, make_adversarial_example, make_high_hr_sample
from wristhr.dsp import dominant_frequency_bpm
from wristhr.frames import SampleFrame

FS, N, HR = 32.0, 256, 75.0
rng = np.random.default_rng(0)
t = np.arange(2 * N) / FS
x = 0.05 * rng.standard_normal(2 * N)
for i, amp in enumerate((1.0, 0.4, 0.2), start=1):
    x += amp * np.sin(2 * np.pi * i * HR / 60.0 * t + rng.uniform(0, 2 * np.pi))
frame = SampleFrame(ppg=x[:N].copy(), acc=np.zeros((N, 3)), fs=FS, t_start=0.0,
                    hr_label=HR, ppg_context=x.copy())
lf = LabeledFrame(frame=frame, hr_label=HR)

adv = make_adversarial_example(lf, np.random.default_rng(1))
high = make_high_hr_sample(lf)

print(f"original label {lf.hr_label:.0f} BPM; adversarial label {adv.hr_label:.1f} BPM "
      f"(random); high-HR label {high.hr_label:.0f} BPM")
print(f"high-HR dominant frequency: {dominant_frequency_bpm(high.frame.ppg, FS):.1f} BPM")

freqs = 60.0 * np.fft.rfftfreq(N, 1 / FS)


def spec(y):
    return np.abs(np.fft.rfft(y - y.mean()))


fig, axes = plt.subplots(1, 2, figsize=(11, 4))
axes[0].plot(freqs, spec(frame.ppg), label="original")
axes[0].plot(freqs, spec(adv.frame.ppg), label="pulse erased")
for i in (1, 2, 3):
    axes[0].axvspan(i * HR - 2.5, i * HR + 2.5, color="r", alpha=0.1)
axes[0].set_xlim(20, 300)
axes[0].set_xlabel("BPM")
axes[0].set_title("adversarial band-stops at HR, 2HR, 3HR")
axes[0].legend()
axes[1].plot(freqs, spec(frame.ppg), label="original (75 BPM)")
axes[1].plot(freqs, spec(high.frame.ppg), label="time-compressed (150 BPM)")
axes[1].set_xlim(20, 300)
axes[1].set_xlabel("BPM")
axes[1].set_title("high-HR speed-up doubles the dominant frequency")
axes[1].legend()
fig.tight_layout()
fig.savefig("demo_augmentation.png", dpi=120)
print("wrote demo_augmentation.png")
