"""Optional SVG charts written by the CLI."""
import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402


def loss_curve(history, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    epochs = [r["epoch"] for r in history]
    ax.plot(epochs, [r["train_loss"] for r in history], label="train loss (normalised)")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r["val_rmse"] for r in history], color="tab:orange", label="val RMSE (km/h)")
    ax.set_xlabel("epoch")
    fig.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def horizon_bars(reports, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = list(reports)
    width = 0.8 / len(names)
    for i, name in enumerate(names):
        reps = reports[name]
        ax.bar([j + i * width for j in range(len(reps))], [r.rmse for r in reps], width, label=name)
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(reps))], [f"{r.horizon_min} min" for r in reps])
    ax.set_ylabel("RMSE (km/h)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
