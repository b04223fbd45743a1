"""Delimited training/eval reports plus the matplotlib figures rendered
alongside them.

Epoch lines use the fixed format
``epoch=<e> loss_mod=<f> loss_ang=<f> aee=<f> lr=<f>`` with 6-decimal floats
so reports stay diffable.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REPORT_FILE = "report.txt"
VALIDATION_FILE = "validation.txt"
CURVES_FILE = "training_curves.png"
EVAL_FILE = "eval.txt"
EVAL_FIGURE = "eval_breakdown.png"


def format_epoch_line(report) -> str:
    return (
        f"epoch={report.epoch} loss_mod={report.loss_mod:.6f} "
        f"loss_ang={report.loss_ang:.6f} aee={report.aee:.6f} lr={report.lr:.6f}"
    )


def append_epoch_line(out_dir, report):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, REPORT_FILE), "a") as f:
        f.write(format_epoch_line(report) + "\n")


def write_validation_lines(out_dir, val_reports):
    if not val_reports:
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, VALIDATION_FILE), "w") as f:
        for epoch, rep in val_reports:
            f.write(f"epoch={epoch} val_aee={rep.aee:.6f} val_aae={rep.aae:.6f} n={rep.num_samples}\n")


def plot_training_curves(out_dir, epoch_reports, val_reports=None, filename=CURVES_FILE):
    """Loss and AEE curves over epochs, saved as one PNG."""
    if not epoch_reports:
        return None
    os.makedirs(out_dir, exist_ok=True)
    epochs = [r.epoch for r in epoch_reports]
    fig, (ax_loss, ax_aee) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [r.loss_mod for r in epoch_reports], label="modulus loss")
    ax_loss.plot(epochs, [r.loss_ang for r in epoch_reports], label="angular loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_loss.grid(alpha=0.3)

    ax_aee.plot(epochs, [r.aee for r in epoch_reports], label="train AEE")
    if val_reports:
        ax_aee.plot(
            [e for e, _ in val_reports], [rep.aee for _, rep in val_reports],
            marker="o", label="val AEE",
        )
    ax_aee.set_xlabel("epoch")
    ax_aee.set_ylabel("AEE (px / gt interval)")
    ax_aee.legend()
    ax_aee.grid(alpha=0.3)

    fig.tight_layout()
    path = os.path.join(out_dir, filename)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_eval_report(out_dir, eval_report):
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"overall aee={eval_report.aee:.6f} aae={eval_report.aae:.6f} n={eval_report.num_samples}"]
    for seq in sorted(eval_report.per_sequence):
        aee, aae, n = eval_report.per_sequence[seq]
        lines.append(f"sequence={seq} aee={aee:.6f} aae={aae:.6f} n={n}")
    path = os.path.join(out_dir, EVAL_FILE)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return lines


def plot_eval_breakdown(out_dir, eval_report, filename=EVAL_FIGURE):
    """Per-sequence AEE/AAE bars next to the delimited eval output."""
    if not eval_report.per_sequence:
        return None
    os.makedirs(out_dir, exist_ok=True)
    seqs = sorted(eval_report.per_sequence)
    aees = [eval_report.per_sequence[s][0] for s in seqs]
    aaes = [eval_report.per_sequence[s][1] for s in seqs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(6, 1.2 * len(seqs) + 3), 3.5))
    ax1.bar(range(len(seqs)), aees)
    ax1.set_xticks(range(len(seqs)), seqs, rotation=45, ha="right", fontsize=8)
    ax1.set_ylabel("AEE (px / gt interval)")
    ax1.axhline(eval_report.aee, color="k", ls="--", lw=0.8, label="overall")
    ax1.legend()
    ax2.bar(range(len(seqs)), aaes, color="tab:orange")
    ax2.set_xticks(range(len(seqs)), seqs, rotation=45, ha="right", fontsize=8)
    ax2.set_ylabel("AAE (deg)")
    fig.tight_layout()
    path = os.path.join(out_dir, filename)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
